//! Seeded random inputs shared by the command-line scenarios, the examples
//! and the test suites.

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, FieldConfig};
use crate::error::Result;
use crate::extended_state::{extract_a, ExtendedAState, ExtendedState, Quantity};
use crate::geometry::minkowski;
use crate::geometry::tensor::{TensorField, Variance};
use crate::lattice::{IndexBox, LatticePatch};

/// Shape of a random field state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldStateSpec {
    pub terms: usize,
    pub dim: usize,
    /// Smallest and largest box edge, in sites.
    pub min_edge: i64,
    pub max_edge: i64,
    /// Probability that a support is a union of two boxes.
    pub two_box_probability: f64,
    /// Bound on the metric perturbation coefficients.
    pub perturbation: f64,
}

impl Default for FieldStateSpec {
    fn default() -> Self {
        FieldStateSpec {
            terms: 5,
            dim: 2,
            min_edge: 3,
            max_edge: 5,
            two_box_probability: 0.3,
            perturbation: 0.02,
        }
    }
}

fn random_box<R: Rng>(rng: &mut R, spec: &FieldStateSpec, lo0: i64) -> IndexBox {
    let lo: Vec<i64> = (0..spec.dim)
        .map(|a| if a == 0 { lo0 } else { rng.random_range(-3..=3) })
        .collect();
    let hi = lo
        .iter()
        .map(|l| l + rng.random_range(spec.min_edge..=spec.max_edge) - 1)
        .collect::<Vec<i64>>();
    IndexBox::new(lo, hi)
}

/// A random support of spacing 1/2: one box, or two boxes separated by a
/// gap along axis 0.
pub fn random_patch<R: Rng>(rng: &mut R, spec: &FieldStateSpec) -> Result<LatticePatch> {
    let lo0 = rng.random_range(-4..=4);
    let first = random_box(rng, spec, lo0);
    let mut boxes = vec![first.clone()];
    if rng.random_bool(spec.two_box_probability) {
        let start = first.hi[0] + rng.random_range(2..=3);
        boxes.push(random_box(rng, spec, start));
    }
    LatticePatch::new(spec.dim, vec![Rational64::new(1, 2); spec.dim], boxes)
}

/// A configuration on a random support whose metric is a small quadratic
/// deformation of the Minkowski metric, carrying a scalar `phi` and a
/// vector `v`.
pub fn random_field_config<R: Rng>(rng: &mut R, spec: &FieldStateSpec) -> Result<FieldConfig> {
    let n = spec.dim;
    let patch = random_patch(rng, spec)?;
    let eps = spec.perturbation;
    let mut coeff = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-eps..=eps)).collect() };
    let lin = coeff(n * n * n);
    let quad = coeff(n * n * n);
    let phi_c = coeff(2 * n + 1);
    let v_c = coeff(n * (n + 1));
    let metric = move |x: &[f64]| {
        let mut g = minkowski(n);
        for i in 0..n {
            for j in i..n {
                let mut d = 0.0;
                for (a, xa) in x.iter().enumerate() {
                    let k = (i * n + j) * n + a;
                    d += lin[k] * xa + quad[k] * xa * xa;
                }
                g[(i, j)] += d;
                if i != j {
                    g[(j, i)] += d;
                }
            }
        }
        g
    };
    let phi = TensorField::scalar(
        n,
        patch
            .sites()
            .into_iter()
            .map(|s| {
                let x = patch.coords(&s);
                let mut p = 50.0 * phi_c[2 * n];
                for (a, xa) in x.iter().enumerate() {
                    p += 50.0 * (phi_c[a] * xa + phi_c[n + a] * xa * xa);
                }
                (s, p)
            })
            .collect(),
    );
    let v = TensorField::new(
        vec![Variance::Up],
        n,
        patch
            .sites()
            .into_iter()
            .map(|s| {
                let x = patch.coords(&s);
                let comps = (0..n)
                    .map(|i| {
                        let base = v_c[i * (n + 1)] * 50.0 + if i == 0 { 1.0 } else { 0.0 };
                        base + (0..n).map(|a| 20.0 * v_c[i * (n + 1) + 1 + a] * x[a]).sum::<f64>()
                    })
                    .collect();
                (s, comps)
            })
            .collect(),
    )?;
    FieldConfig::from_metric_fn(patch, metric)?
        .with_matter("phi", phi)?
        .with_matter("v", v)
}

/// A random superposition of `spec.terms` field configurations with metric
/// coefficient sets and random complex weights.
pub fn random_field_state<R: Rng>(rng: &mut R, spec: &FieldStateSpec) -> Result<ExtendedAState> {
    let mut items = Vec::with_capacity(spec.terms);
    for _ in 0..spec.terms {
        let c = Configuration::Field(random_field_config(rng, spec)?);
        let w = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        items.push((c, w));
    }
    extract_a(&ExtendedState::from_configs(items)?, &Quantity::Metric)
}

/// A random symmetric matrix with entries in `[-bound, bound]`.
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, bound: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-bound..=bound);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}
