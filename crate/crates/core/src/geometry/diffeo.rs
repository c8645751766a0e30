use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{IndexBox, LatticePatch, Site};

use super::tensor::{transform_components, TensorField};

/// Site relocation built from an axis permutation, reflections and an
/// integer translation: `k'[a] = signs[a] * k[perm[a]] + shift[a]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LatticeMapRaw")]
pub struct LatticeMap {
    perm: Vec<usize>,
    signs: Vec<i64>,
    shift: Vec<i64>,
}

#[derive(Deserialize)]
struct LatticeMapRaw {
    perm: Vec<usize>,
    signs: Vec<i64>,
    shift: Vec<i64>,
}

impl TryFrom<LatticeMapRaw> for LatticeMap {
    type Error = Error;
    fn try_from(r: LatticeMapRaw) -> Result<Self> {
        LatticeMap::new(r.perm, r.signs, r.shift)
    }
}

impl LatticeMap {
    pub fn new(perm: Vec<usize>, signs: Vec<i64>, shift: Vec<i64>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::NotInvertible(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if signs.len() != n || shift.len() != n || signs.iter().any(|s| s.abs() != 1) {
            return Err(Error::NotInvertible(
                "signs must be +-1 and match the permutation length".into(),
            ));
        }
        Ok(LatticeMap { perm, signs, shift })
    }

    pub fn translation(shift: Vec<i64>) -> Self {
        let n = shift.len();
        LatticeMap {
            perm: (0..n).collect(),
            signs: vec![1; n],
            shift,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::translation(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[i64] {
        &self.signs
    }

    pub fn shift(&self) -> &[i64] {
        &self.shift
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(a, p)| a == *p)
            && self.signs.iter().all(|s| *s == 1)
            && self.shift.iter().all(|t| *t == 0)
    }

    pub fn apply(&self, k: &Site) -> Site {
        Site(
            (0..self.dim())
                .map(|a| self.signs[a] * k.0[self.perm[a]] + self.shift[a])
                .collect(),
        )
    }

    pub fn inverse(&self) -> LatticeMap {
        let n = self.dim();
        let mut perm = vec![0; n];
        let mut signs = vec![1; n];
        let mut shift = vec![0; n];
        for a in 0..n {
            let b = self.perm[a];
            perm[b] = a;
            signs[b] = self.signs[a];
            shift[b] = -self.signs[a] * self.shift[a];
        }
        LatticeMap { perm, signs, shift }
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &LatticeMap) -> LatticeMap {
        let n = self.dim();
        let mut perm = vec![0; n];
        let mut signs = vec![1; n];
        let mut shift = vec![0; n];
        for a in 0..n {
            let b = next.perm[a];
            perm[a] = self.perm[b];
            signs[a] = next.signs[a] * self.signs[b];
            shift[a] = next.signs[a] * self.shift[b] + next.shift[a];
        }
        LatticeMap { perm, signs, shift }
    }

    pub fn apply_box(&self, b: &IndexBox) -> IndexBox {
        let n = self.dim();
        let mut lo = vec![0; n];
        let mut hi = vec![0; n];
        for a in 0..n {
            let p = self.perm[a];
            if self.signs[a] > 0 {
                lo[a] = b.lo[p] + self.shift[a];
                hi[a] = b.hi[p] + self.shift[a];
            } else {
                lo[a] = -b.hi[p] + self.shift[a];
                hi[a] = -b.lo[p] + self.shift[a];
            }
        }
        IndexBox { lo, hi }
    }

    /// `dx'/dx` in physical coordinates. The image patch carries the
    /// permuted spacing, so the Jacobian is the signed permutation itself.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        for a in 0..n {
            j[(a, self.perm[a])] = self.signs[a] as f64;
        }
        j
    }
}

/// `x' = A (x - x0) + 1/2 B(x - x0, x - x0) + c`, with `B[mu]` symmetric.
///
/// The inverse is found by Newton iteration from the linear guess; for the
/// small quadratic terms used in alignment it converges in a few steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticMapRaw")]
pub struct QuadraticMap {
    x0: Vec<f64>,
    linear: Vec<Vec<f64>>,
    quadratic: Vec<Vec<Vec<f64>>>,
    offset: Vec<f64>,
}

#[derive(Deserialize)]
struct QuadraticMapRaw {
    x0: Vec<f64>,
    linear: Vec<Vec<f64>>,
    quadratic: Vec<Vec<Vec<f64>>>,
    offset: Vec<f64>,
}

impl TryFrom<QuadraticMapRaw> for QuadraticMap {
    type Error = Error;
    fn try_from(r: QuadraticMapRaw) -> Result<Self> {
        QuadraticMap::new(r.x0, r.linear, r.quadratic, r.offset)
    }
}

const NEWTON_MAX_ITERS: usize = 60;

impl QuadraticMap {
    pub fn new(
        x0: Vec<f64>,
        linear: Vec<Vec<f64>>,
        quadratic: Vec<Vec<Vec<f64>>>,
        offset: Vec<f64>,
    ) -> Result<Self> {
        let n = x0.len();
        let shape_ok = linear.len() == n
            && linear.iter().all(|r| r.len() == n)
            && quadratic.len() == n
            && quadratic
                .iter()
                .all(|m| m.len() == n && m.iter().all(|r| r.len() == n))
            && offset.len() == n;
        if !shape_ok {
            return Err(Error::NotInvertible("quadratic map has inconsistent shape".into()));
        }
        for m in &quadratic {
            for (a, row) in m.iter().enumerate() {
                for (b, v) in row.iter().enumerate().take(a) {
                    if *v != m[b][a] {
                        return Err(Error::NotInvertible(
                            "quadratic term must be symmetric in its lower indices".into(),
                        ));
                    }
                }
            }
        }
        let map = QuadraticMap {
            x0,
            linear,
            quadratic,
            offset,
        };
        if map.linear_matrix().determinant().abs() < 1e-300 {
            return Err(Error::NotInvertible("linear part is singular".into()));
        }
        Ok(map)
    }

    /// Builds the map from a matrix linear part and one matrix per quadratic component.
    pub fn from_parts(
        x0: &[f64],
        a: &DMatrix<f64>,
        b: &[DMatrix<f64>],
        offset: &[f64],
    ) -> Result<Self> {
        let n = x0.len();
        let linear = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
        let quadratic = b
            .iter()
            .map(|m| (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect())
            .collect();
        Self::new(x0.to_vec(), linear, quadratic, offset.to_vec())
    }

    /// Affine map fixing `center`: `x' = center + A (x - center)`.
    pub fn linear_about(center: &[f64], a: &DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        Self::from_parts(center, a, &vec![DMatrix::zeros(n, n); n], center)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn linear_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.linear[i][j])
    }

    pub fn quadratic_matrices(&self) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        self.quadratic
            .iter()
            .map(|m| DMatrix::from_fn(n, n, |i, j| m[i][j]))
            .collect()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    fn displaced(&self, d: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|mu| {
                let lin: f64 = (0..n).map(|nu| self.linear[mu][nu] * d[nu]).sum();
                let quad: f64 = (0..n)
                    .map(|a| {
                        (0..n)
                            .map(|b| self.quadratic[mu][a][b] * d[a] * d[b])
                            .sum::<f64>()
                    })
                    .sum();
                lin + 0.5 * quad
            })
            .collect()
    }

    fn jacobian_displaced(&self, d: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |mu, nu| {
            self.linear[mu][nu]
                + (0..n)
                    .map(|b| self.quadratic[mu][nu][b] * d[b])
                    .sum::<f64>()
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        self.displaced(&d)
            .into_iter()
            .zip(&self.offset)
            .map(|(v, c)| v + c)
            .collect()
    }

    /// `dx'/dx` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        self.jacobian_displaced(&d)
    }

    pub fn inverse_point(&self, xp: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let target = DVector::from_iterator(n, xp.iter().zip(&self.offset).map(|(a, c)| a - c));
        let a_inv = self
            .linear_matrix()
            .try_inverse()
            .ok_or_else(|| Error::NotInvertible("singular linear part".into()))?;
        let mut d = &a_inv * &target;
        let scale = 1.0 + target.amax();
        for _ in 0..NEWTON_MAX_ITERS {
            let f = DVector::from_vec(self.displaced(d.as_slice())) - &target;
            if f.amax() <= 1e-15 * scale {
                break;
            }
            let j = self.jacobian_displaced(d.as_slice());
            let step = j.lu().solve(&f).ok_or_else(|| {
                Error::NotInvertibleOnPatch("singular Jacobian during inversion".into())
            })?;
            d -= step;
        }
        let f = DVector::from_vec(self.displaced(d.as_slice())) - &target;
        if !(f.amax() <= 1e-11 * scale) {
            return Err(Error::NotInvertibleOnPatch(format!(
                "Newton inversion did not converge at {xp:?}"
            )));
        }
        Ok(d.iter().zip(&self.x0).map(|(a, b)| a + b).collect())
    }
}

/// A diffeomorphism of the coordinate lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffeo {
    Identity,
    Lattice(LatticeMap),
    Quadratic(QuadraticMap),
    /// Inverse of the wrapped map.
    Inverse(Box<Diffeo>),
    /// Maps applied first to last.
    Composite(Vec<Diffeo>),
}

fn index_to_coords(idx: &[i64], spacing: &[f64]) -> Vec<f64> {
    idx.iter().zip(spacing).map(|(k, h)| *k as f64 * h).collect()
}

const SNAP_TOLERANCE: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_TOLERANCE {
        r
    } else {
        x
    }
}

impl Diffeo {
    pub fn translation(shift: Vec<i64>) -> Self {
        Diffeo::Lattice(LatticeMap::translation(shift))
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Diffeo::Identity => true,
            Diffeo::Lattice(m) => m.is_identity(),
            Diffeo::Composite(v) => v.iter().all(Diffeo::is_identity),
            Diffeo::Inverse(d) => d.is_identity(),
            Diffeo::Quadratic(_) => false,
        }
    }

    /// True when the map sends lattice sites to lattice sites exactly.
    pub fn is_lattice_exact(&self) -> bool {
        match self {
            Diffeo::Identity | Diffeo::Lattice(_) => true,
            Diffeo::Inverse(d) => d.is_lattice_exact(),
            Diffeo::Composite(v) => v.iter().all(Diffeo::is_lattice_exact),
            Diffeo::Quadratic(_) => false,
        }
    }

    /// Collapses to a single lattice map when every part is lattice-exact.
    pub fn as_lattice_map(&self, dim: usize) -> Option<LatticeMap> {
        match self {
            Diffeo::Identity => Some(LatticeMap::identity(dim)),
            Diffeo::Lattice(m) => Some(m.clone()),
            Diffeo::Inverse(d) => d.as_lattice_map(dim).map(|m| m.inverse()),
            Diffeo::Composite(v) => v.iter().try_fold(LatticeMap::identity(dim), |acc, d| {
                d.as_lattice_map(dim).map(|m| acc.then(&m))
            }),
            Diffeo::Quadratic(_) => None,
        }
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &Diffeo) -> Diffeo {
        match (self, next) {
            (Diffeo::Identity, d) | (d, Diffeo::Identity) => d.clone(),
            (Diffeo::Lattice(a), Diffeo::Lattice(b)) => Diffeo::Lattice(a.then(b)),
            _ => {
                let mut parts = Vec::new();
                for d in [self, next] {
                    match d {
                        Diffeo::Composite(v) => parts.extend(v.iter().cloned()),
                        other => parts.push(other.clone()),
                    }
                }
                Diffeo::Composite(parts)
            }
        }
    }

    pub fn inverse(&self) -> Diffeo {
        match self {
            Diffeo::Identity => Diffeo::Identity,
            Diffeo::Lattice(m) => Diffeo::Lattice(m.inverse()),
            Diffeo::Inverse(d) => (**d).clone(),
            Diffeo::Composite(v) => Diffeo::Composite(v.iter().rev().map(Diffeo::inverse).collect()),
            Diffeo::Quadratic(_) => Diffeo::Inverse(Box::new(self.clone())),
        }
    }

    /// Image of a coordinate point.
    pub fn map_point(&self, x: &[f64], spacing: &[f64]) -> Result<Vec<f64>> {
        match self {
            Diffeo::Identity => Ok(x.to_vec()),
            Diffeo::Lattice(m) => {
                Ok((0..m.dim())
                    .map(|a| {
                        let p = m.perm[a];
                        m.signs[a] as f64 * x[p] + m.shift[a] as f64 * spacing[p]
                    })
                    .collect())
            }
            Diffeo::Quadratic(q) => Ok(q.forward(x)),
            Diffeo::Inverse(d) => d.inverse_point(x, spacing),
            Diffeo::Composite(v) => v
                .iter()
                .try_fold(x.to_vec(), |acc, d| d.map_point(&acc, spacing)),
        }
    }

    /// Preimage of a coordinate point.
    pub fn inverse_point(&self, xp: &[f64], spacing: &[f64]) -> Result<Vec<f64>> {
        match self {
            Diffeo::Quadratic(q) => q.inverse_point(xp),
            Diffeo::Inverse(d) => d.map_point(xp, spacing),
            other => other.inverse().map_point(xp, spacing),
        }
    }

    /// `dx'/dx` at coordinate point `x`.
    pub fn jacobian(&self, x: &[f64], spacing: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        match self {
            Diffeo::Identity => Ok(DMatrix::identity(n, n)),
            Diffeo::Lattice(m) => Ok(m.jacobian()),
            Diffeo::Quadratic(q) => Ok(q.jacobian(x)),
            Diffeo::Inverse(d) => {
                let pre = d.inverse_point(x, spacing)?;
                d.jacobian(&pre, spacing)?
                    .try_inverse()
                    .ok_or_else(|| Error::NotInvertibleOnPatch("singular Jacobian".into()))
            }
            Diffeo::Composite(v) => {
                let mut j = DMatrix::identity(n, n);
                let mut cur = x.to_vec();
                for d in v {
                    j = d.jacobian(&cur, spacing)? * j;
                    cur = d.map_point(&cur, spacing)?;
                }
                Ok(j)
            }
        }
    }

    /// Image of a lattice site, when it lands on a site (within 1e-9 in
    /// index units for non-lattice maps).
    pub fn map_site(&self, s: &Site, spacing: &[f64]) -> Result<Option<Site>> {
        if let Some(m) = self.as_lattice_map(s.dim()) {
            return Ok(Some(m.apply(s)));
        }
        let xp = self.map_point(&index_to_coords(&s.0, spacing), spacing)?;
        let mut k = Vec::with_capacity(xp.len());
        for (x, h) in xp.iter().zip(spacing) {
            let idx = x / h;
            let r = idx.round();
            if (idx - r).abs() > SNAP_TOLERANCE {
                return Ok(None);
            }
            k.push(r as i64);
        }
        Ok(Some(Site(k)))
    }

    fn check_invertible_on(&self, patch: &LatticePatch) -> Result<()> {
        let spacing = patch.spacing_f64();
        for s in patch.sites() {
            let x = patch.coords(&s);
            let det = self.jacobian(&x, &spacing)?.determinant();
            if !(det.abs() > 1e-12) {
                return Err(Error::NotInvertibleOnPatch(format!(
                    "Jacobian determinant {det:e} at site {s}"
                )));
            }
        }
        Ok(())
    }

    /// Pulls a set of tensor fields living on `patch` through the map.
    ///
    /// Lattice-exact maps relocate values exactly; other maps resample at
    /// preimages of target sites with multilinear interpolation, keeping only
    /// target sites whose interpolation cell lies inside the source patch.
    pub fn pullback_fields(
        &self,
        patch: &LatticePatch,
        fields: &[&TensorField],
    ) -> Result<(LatticePatch, Vec<TensorField>)> {
        let dim = patch.dim();
        let spacing = patch.spacing_f64();
        if let Some(m) = self.as_lattice_map(dim) {
            if m.dim() != dim {
                return Err(Error::NotInvertibleOnPatch("map dimension mismatch".into()));
            }
            let new_patch = LatticePatch::new(
                dim,
                permuted_spacing(patch, &m),
                patch.boxes().iter().map(|b| m.apply_box(b)).collect(),
            )?;
            let jac = m.jacobian();
            let inv = jac
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NotInvertibleOnPatch("singular lattice map".into()))?;
            let out = fields
                .iter()
                .map(|f| {
                    let values = f
                        .values()
                        .iter()
                        .map(|(s, v)| {
                            (m.apply(s), transform_components(v, f.slots(), f.dim(), &inv, &jac))
                        })
                        .collect();
                    f.with_values(values)
                })
                .collect();
            return Ok((new_patch, out));
        }
        if let Diffeo::Composite(parts) = self {
            let mut cur_patch = patch.clone();
            let mut cur: Vec<TensorField> = fields.iter().map(|f| (*f).clone()).collect();
            for d in parts {
                let refs: Vec<&TensorField> = cur.iter().collect();
                let (p, f) = d.pullback_fields(&cur_patch, &refs)?;
                cur_patch = p;
                cur = f;
            }
            return Ok((cur_patch, cur));
        }

        self.check_invertible_on(patch)?;
        let mut lo = vec![i64::MAX; dim];
        let mut hi = vec![i64::MIN; dim];
        for s in patch.sites() {
            let xp = self.map_point(&patch.coords(&s), &spacing)?;
            for a in 0..dim {
                let idx = xp[a] / spacing[a];
                lo[a] = lo[a].min(idx.floor() as i64 - 1);
                hi[a] = hi[a].max(idx.ceil() as i64 + 1);
            }
        }
        let candidates = IndexBox::new(lo, hi);
        if candidates.num_sites() > 4_000_000 {
            return Err(Error::TooLarge("pullback image bounding box".into()));
        }
        let mut sites = BTreeSet::new();
        let mut values: Vec<std::collections::BTreeMap<Site, Vec<f64>>> =
            vec![Default::default(); fields.len()];
        for t in candidates.sites() {
            let xp = index_to_coords(&t.0, &spacing);
            let Ok(x) = self.inverse_point(&xp, &spacing) else {
                continue;
            };
            let idx: Vec<f64> = x.iter().zip(&spacing).map(|(c, h)| snap(c / h)).collect();
            let interpolated: Option<Vec<Vec<f64>>> =
                fields.iter().map(|f| f.interpolate(&idx)).collect();
            let Some(interpolated) = interpolated else {
                continue;
            };
            let jac = self.jacobian(&x, &spacing)?;
            let inv = jac
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NotInvertibleOnPatch(format!("singular Jacobian at {t}")))?;
            for ((f, v), out) in fields.iter().zip(interpolated).zip(values.iter_mut()) {
                out.insert(t.clone(), transform_components(&v, f.slots(), f.dim(), &inv, &jac));
            }
            sites.insert(t);
        }
        if sites.is_empty() {
            return Err(Error::NotInvertibleOnPatch(
                "image contains no interpolable lattice site".into(),
            ));
        }
        let new_patch = LatticePatch::from_sites(dim, patch.spacing().to_vec(), &sites)?;
        let out = fields
            .iter()
            .zip(values)
            .map(|(f, v)| f.with_values(v))
            .collect();
        Ok((new_patch, out))
    }
}

fn permuted_spacing(patch: &LatticePatch, m: &LatticeMap) -> Vec<num_rational::Rational64> {
    (0..patch.dim()).map(|a| patch.spacing()[m.perm()[a]]).collect()
}
