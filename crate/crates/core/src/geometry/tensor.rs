use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Site;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    Up,
    Down,
}

/// Per-site tensor components over a finite site set.
///
/// Components are stored row-major over the index slots, slot 0 slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorField {
    slots: Vec<Variance>,
    dim: usize,
    #[serde(with = "crate::serde_util::pairs")]
    values: BTreeMap<Site, Vec<f64>>,
}

pub fn num_components(dim: usize, rank: usize) -> usize {
    dim.pow(rank as u32)
}

impl TensorField {
    pub fn new(slots: Vec<Variance>, dim: usize, values: BTreeMap<Site, Vec<f64>>) -> Result<Self> {
        let n = num_components(dim, slots.len());
        for (s, v) in &values {
            if v.len() != n {
                return Err(Error::InvalidTensor(format!(
                    "site {s} has {} components, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidTensor(format!("non-finite component at {s}")));
            }
        }
        Ok(TensorField { slots, dim, values })
    }

    pub fn scalar(dim: usize, values: BTreeMap<Site, f64>) -> Self {
        TensorField {
            slots: vec![],
            dim,
            values: values.into_iter().map(|(s, v)| (s, vec![v])).collect(),
        }
    }

    /// Covariant rank-2 field from a closure over sites.
    pub fn metric_from_fn(
        dim: usize,
        sites: impl IntoIterator<Item = Site>,
        f: impl Fn(&Site) -> DMatrix<f64>,
    ) -> Self {
        let values = sites
            .into_iter()
            .map(|s| {
                let m = f(&s);
                (s, m.transpose().as_slice().to_vec())
            })
            .collect();
        TensorField {
            slots: vec![Variance::Down, Variance::Down],
            dim,
            values,
        }
    }

    pub fn slots(&self) -> &[Variance] {
        &self.slots
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_scalar(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn values(&self) -> &BTreeMap<Site, Vec<f64>> {
        &self.values
    }

    pub fn get(&self, s: &Site) -> Option<&[f64]> {
        self.values.get(s).map(Vec::as_slice)
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.values.keys()
    }

    pub fn same_shape(&self, other: &TensorField) -> bool {
        self.slots == other.slots && self.dim == other.dim
    }

    /// Rank-2 components at `s` as a matrix (row = first index).
    pub fn matrix_at(&self, s: &Site) -> Option<DMatrix<f64>> {
        if self.rank() != 2 {
            return None;
        }
        self.get(s)
            .map(|v| DMatrix::from_row_slice(self.dim, self.dim, v))
    }

    pub fn restricted<'a>(&self, sites: impl IntoIterator<Item = &'a Site>) -> Option<TensorField> {
        let mut values = BTreeMap::new();
        for s in sites {
            values.insert(s.clone(), self.values.get(s)?.clone());
        }
        Some(TensorField {
            slots: self.slots.clone(),
            dim: self.dim,
            values,
        })
    }

    pub(crate) fn with_values(&self, values: BTreeMap<Site, Vec<f64>>) -> TensorField {
        TensorField {
            slots: self.slots.clone(),
            dim: self.dim,
            values,
        }
    }

    /// Multilinear interpolation at fractional lattice index `idx`.
    ///
    /// Axes with zero fractional part use only the floor site, so points
    /// that land on lattice sites never need neighbours.
    pub fn interpolate(&self, idx: &[f64]) -> Option<Vec<f64>> {
        let n = idx.len();
        let base: Vec<i64> = idx.iter().map(|x| x.floor() as i64).collect();
        let frac: Vec<f64> = idx.iter().zip(&base).map(|(x, b)| x - *b as f64).collect();
        let active: Vec<usize> = (0..n).filter(|&a| frac[a] != 0.0).collect();
        let ncomp = self.values.values().next().map_or(0, Vec::len);
        let mut out = vec![0.0; ncomp];
        for corner in 0..(1usize << active.len()) {
            let mut k = base.clone();
            let mut w = 1.0;
            for (bit, &a) in active.iter().enumerate() {
                if corner >> bit & 1 == 1 {
                    k[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            let v = self.values.get(&Site(k))?;
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        Some(out)
    }
}

fn is_signed_permutation(m: &DMatrix<f64>) -> bool {
    m.row_iter().all(|row| {
        row.iter().filter(|x| **x != 0.0).count() == 1
            && row.iter().all(|x| *x == 0.0 || x.abs() == 1.0)
    }) && m.column_iter().all(|c| c.iter().filter(|x| **x != 0.0).count() == 1)
}

/// Applies `new[.., a, ..] = sum_mu m[(a, mu)] * old[.., mu, ..]` along one slot.
fn mode_product(comps: &[f64], dim: usize, rank: usize, slot: usize, m: &DMatrix<f64>) -> Vec<f64> {
    let stride = dim.pow((rank - 1 - slot) as u32);
    let block = stride * dim;
    let mut out = vec![0.0; comps.len()];
    let exact = is_signed_permutation(m);
    for outer in (0..comps.len()).step_by(block) {
        for inner in 0..stride {
            for a in 0..dim {
                let dst = outer + a * stride + inner;
                if exact {
                    // Exact relocation: a single +-1 entry per row.
                    let mu = (0..dim).find(|&mu| m[(a, mu)] != 0.0).unwrap();
                    let v = comps[outer + mu * stride + inner];
                    out[dst] = if m[(a, mu)] < 0.0 { -v } else { v };
                } else {
                    out[dst] = (0..dim)
                        .map(|mu| m[(a, mu)] * comps[outer + mu * stride + inner])
                        .sum();
                }
            }
        }
    }
    out
}

/// Transforms components under a change of coordinates `x -> x'`.
///
/// `dx_dxp` is the matrix `dx^mu/dx'^a` (row mu, column a). Covariant slots
/// contract with it; contravariant slots with its inverse.
pub fn transform_components(
    comps: &[f64],
    slots: &[Variance],
    dim: usize,
    dx_dxp: &DMatrix<f64>,
    dxp_dx: &DMatrix<f64>,
) -> Vec<f64> {
    let rank = slots.len();
    let down = dx_dxp.transpose();
    let mut cur = comps.to_vec();
    for (slot, v) in slots.iter().enumerate() {
        let m = match v {
            Variance::Down => &down,
            Variance::Up => dxp_dx,
        };
        cur = mode_product(&cur, dim, rank, slot, m);
    }
    cur
}

/// Multi-index decode for row-major storage.
pub(crate) fn unflatten(mut flat: usize, dim: usize, rank: usize) -> Vec<usize> {
    let mut idx = vec![0; rank];
    for slot in (0..rank).rev() {
        idx[slot] = flat % dim;
        flat /= dim;
    }
    idx
}

pub(crate) fn flatten(idx: &[usize], dim: usize) -> usize {
    idx.iter().fold(0, |acc, i| acc * dim + i)
}

/// Pointwise Einstein summation of `b` and `c` over the slot pairs in
/// `pairing` (`(slot of b, slot of c)`).
///
/// The result carries `b`'s free slots followed by `c`'s, in their
/// original order.
pub fn contract_components(
    b_slots: &[Variance],
    b: &[f64],
    c_slots: &[Variance],
    c: &[f64],
    dim: usize,
    pairing: &[(usize, usize)],
) -> Result<(Vec<Variance>, Vec<f64>)> {
    let mut seen_b = vec![false; b_slots.len()];
    let mut seen_c = vec![false; c_slots.len()];
    for &(i, j) in pairing {
        if i >= b_slots.len() || j >= c_slots.len() {
            return Err(Error::PairingMismatch(format!("slot pair ({i}, {j}) out of range")));
        }
        if seen_b[i] || seen_c[j] {
            return Err(Error::PairingMismatch(format!("slot reused in pair ({i}, {j})")));
        }
        if b_slots[i] == c_slots[j] {
            return Err(Error::PairingMismatch(format!(
                "slots ({i}, {j}) have the same variance"
            )));
        }
        seen_b[i] = true;
        seen_c[j] = true;
    }
    if b.len() != num_components(dim, b_slots.len()) || c.len() != num_components(dim, c_slots.len())
    {
        return Err(Error::PairingMismatch("component count does not match dimension".into()));
    }
    let free_b: Vec<usize> = (0..b_slots.len()).filter(|i| !seen_b[*i]).collect();
    let free_c: Vec<usize> = (0..c_slots.len()).filter(|j| !seen_c[*j]).collect();
    let out_slots: Vec<Variance> = free_b
        .iter()
        .map(|&i| b_slots[i])
        .chain(free_c.iter().map(|&j| c_slots[j]))
        .collect();
    let out_rank = out_slots.len();
    let npair = pairing.len();
    let mut out = vec![0.0; num_components(dim, out_rank)];
    let mut bi = vec![0; b_slots.len()];
    let mut ci = vec![0; c_slots.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let oi = unflatten(flat, dim, out_rank);
        for (k, &i) in free_b.iter().enumerate() {
            bi[i] = oi[k];
        }
        for (k, &j) in free_c.iter().enumerate() {
            ci[j] = oi[free_b.len() + k];
        }
        let mut acc = 0.0;
        for summed in 0..num_components(dim, npair) {
            let si = unflatten(summed, dim, npair);
            for (p, &(i, j)) in pairing.iter().enumerate() {
                bi[i] = si[p];
                ci[j] = si[p];
            }
            acc += b[flatten(&bi, dim)] * c[flatten(&ci, dim)];
        }
        *o = acc;
    }
    Ok((out_slots, out))
}
