//! Integer lattices: sites, time supports and box-union patches.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site, given by its integer index on every axis.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(idx: impl Into<Vec<i64>>) -> Self {
        Site(idx.into())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn offset(&self, axis: usize, by: i64) -> Site {
        let mut k = self.0.clone();
        k[axis] += by;
        Site(k)
    }

    pub fn shifted(&self, by: &[i64]) -> Site {
        Site(self.0.iter().zip(by).map(|(a, b)| a + b).collect())
    }

    /// Face-adjacent (unit step along exactly one axis).
    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.dim() == other.dim()
            && self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b).abs())
                .sum::<i64>()
                == 1
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

pub(crate) fn rational_to_f64(r: Rational64) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Inclusive integer box `lo <= k <= hi` (componentwise).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl IndexBox {
    pub fn new(lo: impl Into<Vec<i64>>, hi: impl Into<Vec<i64>>) -> Self {
        IndexBox {
            lo: lo.into(),
            hi: hi.into(),
        }
    }

    /// Cube of half-width `radius` around `center`.
    pub fn around(center: &[i64], radius: i64) -> Self {
        IndexBox {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.len() == self.hi.len() && self.lo.iter().zip(&self.hi).all(|(l, h)| l <= h)
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.len() == self.lo.len()
            && k
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn intersects(&self, other: &IndexBox) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((l1, h1), (l2, h2))| l1 <= h2 && l2 <= h1)
    }

    pub fn num_sites(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .product()
    }

    /// Sites in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.num_sites());
        if n == 0 {
            return out;
        }
        let mut k = self.lo.clone();
        loop {
            out.push(Site(k.clone()));
            let mut axis = n;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if k[axis] < self.hi[axis] {
                    k[axis] += 1;
                    k[axis + 1..n].copy_from_slice(&self.lo[axis + 1..n]);
                    break;
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct RawPatch {
    dim: usize,
    spacing: Vec<Rational64>,
    boxes: Vec<IndexBox>,
}

/// A union of disjoint axis-aligned integer boxes in `dim` dimensions,
/// with a positive rational step per axis. Coordinates are `x = k * spacing`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPatch")]
pub struct LatticePatch {
    dim: usize,
    spacing: Vec<Rational64>,
    boxes: Vec<IndexBox>,
}

impl TryFrom<RawPatch> for LatticePatch {
    type Error = Error;
    fn try_from(raw: RawPatch) -> Result<Self> {
        LatticePatch::new(raw.dim, raw.spacing, raw.boxes)
    }
}

impl LatticePatch {
    pub fn new(dim: usize, spacing: Vec<Rational64>, boxes: Vec<IndexBox>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSupport("dimension must be >= 1".into()));
        }
        if spacing.len() != dim || spacing.iter().any(|h| *h <= Rational64::zero()) {
            return Err(Error::InvalidSupport(
                "spacing needs one positive step per axis".into(),
            ));
        }
        for b in &boxes {
            if b.dim() != dim || !b.is_valid() {
                return Err(Error::InvalidSupport(format!("malformed box {b:?}")));
            }
        }
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                if a.intersects(b) {
                    return Err(Error::InvalidSupport(format!(
                        "boxes {a:?} and {b:?} overlap"
                    )));
                }
            }
        }
        Ok(LatticePatch {
            dim,
            spacing,
            boxes,
        })
    }

    /// Single box with the same step on every axis.
    pub fn uniform_box(spacing: Rational64, b: IndexBox) -> Result<Self> {
        let dim = b.dim();
        Self::new(dim, vec![spacing; dim], vec![b])
    }

    /// Decomposes an arbitrary site set into runs along the last axis.
    pub fn from_sites(
        dim: usize,
        spacing: Vec<Rational64>,
        sites: &BTreeSet<Site>,
    ) -> Result<Self> {
        let mut boxes: Vec<IndexBox> = Vec::new();
        let mut run: Option<(Vec<i64>, Vec<i64>)> = None;
        for s in sites {
            if s.dim() != dim {
                return Err(Error::InvalidSupport("site dimension mismatch".into()));
            }
            match &mut run {
                Some((lo, hi))
                    if lo[..dim - 1] == s.0[..dim - 1] && hi[dim - 1] + 1 == s.0[dim - 1] =>
                {
                    hi[dim - 1] += 1;
                }
                _ => {
                    if let Some((lo, hi)) = run.take() {
                        boxes.push(IndexBox { lo, hi });
                    }
                    run = Some((s.0.clone(), s.0.clone()));
                }
            }
        }
        if let Some((lo, hi)) = run {
            boxes.push(IndexBox { lo, hi });
        }
        Self::new(dim, spacing, boxes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> &[Rational64] {
        &self.spacing
    }

    pub fn spacing_f64(&self) -> Vec<f64> {
        self.spacing.iter().map(|h| rational_to_f64(*h)).collect()
    }

    pub fn boxes(&self) -> &[IndexBox] {
        &self.boxes
    }

    pub fn num_sites(&self) -> usize {
        self.boxes.iter().map(IndexBox::num_sites).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains_site(&self, s: &Site) -> bool {
        self.boxes.iter().any(|b| b.contains(&s.0))
    }

    /// All sites, sorted.
    pub fn site_set(&self) -> BTreeSet<Site> {
        self.boxes.iter().flat_map(|b| b.sites()).collect()
    }

    pub fn sites(&self) -> Vec<Site> {
        self.site_set().into_iter().collect()
    }

    pub fn coords(&self, s: &Site) -> Vec<f64> {
        s.0.iter()
            .zip(&self.spacing)
            .map(|(k, h)| *k as f64 * rational_to_f64(*h))
            .collect()
    }

    /// A site is interior when all `2 * dim` face neighbours are in the patch.
    pub fn is_interior(&self, s: &Site) -> bool {
        (0..self.dim).all(|a| {
            self.contains_site(&s.offset(a, 1)) && self.contains_site(&s.offset(a, -1))
        })
    }

    pub fn interior_sites(&self) -> Vec<Site> {
        self.sites()
            .into_iter()
            .filter(|s| self.is_interior(s))
            .collect()
    }

    pub fn same_grid(&self, other: &LatticePatch) -> bool {
        self.dim == other.dim && self.spacing == other.spacing
    }

    pub fn is_subset_of(&self, other: &LatticePatch) -> bool {
        self.same_grid(other)
            && self
                .boxes
                .iter()
                .all(|b| b.sites().iter().all(|s| other.contains_site(s)))
    }

    pub fn same_sites(&self, other: &LatticePatch) -> bool {
        self.same_grid(other) && self.site_set() == other.site_set()
    }

    /// Every site within Chebyshev distance `margin` of `s` is in the patch.
    pub fn has_margin(&self, s: &Site, margin: i64) -> bool {
        IndexBox::around(&s.0, margin)
            .sites()
            .iter()
            .all(|t| self.contains_site(t))
    }
}

#[derive(Deserialize)]
struct RawTimeSupport {
    origin: Rational64,
    step: Rational64,
    intervals: Vec<[i64; 2]>,
}

/// A union of disjoint closed index intervals on the time grid
/// `t_k = origin + k * step`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTimeSupport")]
pub struct TimeSupport {
    origin: Rational64,
    step: Rational64,
    intervals: Vec<[i64; 2]>,
}

impl TryFrom<RawTimeSupport> for TimeSupport {
    type Error = Error;
    fn try_from(raw: RawTimeSupport) -> Result<Self> {
        TimeSupport::new(raw.origin, raw.step, raw.intervals)
    }
}

impl TimeSupport {
    pub fn new(origin: Rational64, step: Rational64, intervals: Vec<[i64; 2]>) -> Result<Self> {
        if step <= Rational64::zero() {
            return Err(Error::InvalidSupport("time step must be positive".into()));
        }
        for iv in &intervals {
            if iv[0] > iv[1] {
                return Err(Error::InvalidSupport(format!("empty interval {iv:?}")));
            }
        }
        for w in intervals.windows(2) {
            if w[0][1] >= w[1][0] {
                return Err(Error::InvalidSupport(
                    "intervals must be sorted and disjoint".into(),
                ));
            }
        }
        Ok(TimeSupport {
            origin,
            step,
            intervals,
        })
    }

    pub fn interval(origin: Rational64, step: Rational64, start: i64, end: i64) -> Result<Self> {
        Self::new(origin, step, vec![[start, end]])
    }

    pub fn origin(&self) -> Rational64 {
        self.origin
    }

    pub fn step(&self) -> Rational64 {
        self.step
    }

    pub fn intervals(&self) -> &[[i64; 2]] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals
            .iter()
            .map(|[a, b]| (b - a + 1) as usize)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        self.intervals.iter().flat_map(|[a, b]| *a..=*b)
    }

    pub fn contains_index(&self, k: i64) -> bool {
        self.intervals.iter().any(|[a, b]| *a <= k && k <= *b)
    }

    pub fn is_last_in_interval(&self, k: i64) -> bool {
        self.intervals.iter().any(|[_, b]| *b == k)
    }

    pub fn time_of(&self, k: i64) -> Rational64 {
        self.origin + self.step * Rational64::from_integer(k)
    }

    /// Grid index of `t`, when `t` lies on the grid.
    pub fn index_of(&self, t: Rational64) -> Option<i64> {
        let q = (t - self.origin) / self.step;
        q.is_integer().then(|| q.to_integer())
    }

    pub fn same_grid(&self, other: &TimeSupport) -> bool {
        self.origin == other.origin && self.step == other.step
    }

    pub fn is_subset_of(&self, other: &TimeSupport) -> bool {
        self.same_grid(other)
            && self
                .intervals
                .iter()
                .all(|[a, b]| other.intervals.iter().any(|[c, d]| c <= a && b <= d))
    }
}

/// Uniform position lattice `y_j = origin + j * step`, `0 <= j < count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PositionLattice {
    pub origin: Rational64,
    pub step: Rational64,
    pub count: usize,
}

impl PositionLattice {
    pub fn new(origin: Rational64, step: Rational64, count: usize) -> Result<Self> {
        if step <= Rational64::zero() || count == 0 {
            return Err(Error::InvalidSupport(
                "position lattice needs a positive step and at least one site".into(),
            ));
        }
        Ok(PositionLattice {
            origin,
            step,
            count,
        })
    }

    /// `count` points spanning `[lo, hi]` inclusive.
    pub fn spanning(lo: Rational64, hi: Rational64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidSupport("need at least two sites".into()));
        }
        Self::new(lo, (hi - lo) / Rational64::from_integer(count as i64 - 1), count)
    }

    pub fn contains(&self, j: i64) -> bool {
        j >= 0 && (j as usize) < self.count
    }

    pub fn position(&self, j: i64) -> f64 {
        rational_to_f64(self.origin + self.step * Rational64::from_integer(j))
    }

    pub fn step_f64(&self) -> f64 {
        rational_to_f64(self.step)
    }

    /// Index of the lattice point equal to `y`, if any.
    pub fn index_of(&self, y: Rational64) -> Option<i64> {
        let q = (y - self.origin) / self.step;
        (q.is_integer() && self.contains(q.to_integer())).then(|| q.to_integer())
    }
}

/// Support of either configuration kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Time(TimeSupport),
    Lattice(LatticePatch),
}

impl Support {
    pub fn is_subset_of(&self, other: &Support) -> Result<bool> {
        match (self, other) {
            (Support::Time(a), Support::Time(b)) => Ok(a.is_subset_of(b)),
            (Support::Lattice(a), Support::Lattice(b)) => Ok(a.is_subset_of(b)),
            _ => Err(Error::KindMismatch),
        }
    }
}
