use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Site;

use super::tensor::{TensorField, Variance};

/// The flat metric `diag(-1, +1, ..., +1)` in `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinkowskiMetric {
    pub dim: usize,
}

impl MinkowskiMetric {
    pub fn new(dim: usize) -> Self {
        MinkowskiMetric { dim }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        minkowski(self.dim)
    }
}

pub fn minkowski(dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim);
    if dim > 0 {
        m[(0, 0)] = -1.0;
    }
    m
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix, with
/// the metric checked to be Lorentzian.
fn lorentzian_eigen(g: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n {
        return Err(Error::WrongSignature(format!("{}x{} is not a square metric", n, g.ncols())));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::WrongSignature("non-finite component".into()));
    }
    let scale = max_abs(g);
    let asym = max_abs(&(g - g.transpose()));
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::WrongSignature(format!("not symmetric (asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new((g + g.transpose()) * 0.5);
    let tol = 1e-12 * eig.eigenvalues.amax();
    let neg = eig.eigenvalues.iter().filter(|l| **l < -tol).count();
    let zero = eig.eigenvalues.iter().filter(|l| l.abs() <= tol).count();
    if neg != 1 || zero != 0 {
        return Err(Error::WrongSignature(format!(
            "eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    Ok(eig)
}

/// True when `g` is symmetric with exactly one negative and no zero
/// eigenvalue.
pub fn is_lorentzian(g: &DMatrix<f64>) -> bool {
    lorentzian_eigen(g).is_ok()
}

/// Frame `J` with `J^T g J = eta`.
///
/// Built from `g = O D O^T` as `J = O |D|^{-1/2}`. The negative-eigenvalue
/// column comes first; the rest are ordered by eigenvalue, ties broken by
/// the position of the eigenvector's largest entry. Each column is signed
/// so that its largest-magnitude entry is positive.
pub fn minkowski_frame(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = lorentzian_eigen(g)?;
    let n = g.nrows();
    let lead = |c: usize| -> usize {
        let col = eig.eigenvectors.column(c);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        best
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        la.partial_cmp(&lb)
            .unwrap()
            .then_with(|| lead(a).cmp(&lead(b)))
    });
    let mut j = DMatrix::zeros(n, n);
    for (k, &c) in order.iter().enumerate() {
        let lam = eig.eigenvalues[c];
        let l = lead(c);
        let sign = if eig.eigenvectors[(l, c)] < 0.0 { -1.0 } else { 1.0 };
        let s = sign / lam.abs().sqrt();
        for i in 0..n {
            j[(i, k)] = eig.eigenvectors[(i, c)] * s;
        }
    }
    Ok(j)
}

/// Connection coefficients `Gamma^l_{mn}`, stored `[l][m][n]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, l: usize, m: usize, n: usize) -> f64 {
        self.data[(l * self.dim + m) * self.dim + n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The matrix `Gamma^l_{..}` for fixed upper index `l`.
    pub fn slice(&self, l: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_row_slice(n, n, &self.data[l * n * n..(l + 1) * n * n])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

/// Levi-Civita coefficients from a metric value and its first derivatives
/// (`grad[a]` is `d_a g`).
pub fn christoffel_from_derivatives(g: &DMatrix<f64>, grad: &[DMatrix<f64>]) -> Result<Christoffel> {
    let n = g.nrows();
    let ginv = g.clone().try_inverse().ok_or(Error::SingularMetric)?;
    if !ginv.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularMetric);
    }
    let mut out = Christoffel::zeros(n);
    for l in 0..n {
        for m in 0..n {
            for nu in 0..n {
                let mut acc = 0.0;
                for s in 0..n {
                    acc += ginv[(l, s)] * (grad[m][(s, nu)] + grad[nu][(s, m)] - grad[s][(m, nu)]);
                }
                out.data[(l * n + m) * n + nu] = 0.5 * acc;
            }
        }
    }
    Ok(out)
}

fn metric_at(g: &TensorField, s: &Site) -> Result<DMatrix<f64>> {
    g.matrix_at(s).ok_or_else(|| Error::BoundarySite(s.0.clone()))
}

fn check_metric_field(g: &TensorField) -> Result<()> {
    if g.slots() != [Variance::Down, Variance::Down] {
        return Err(Error::InvalidTensor("metric must have two covariant slots".into()));
    }
    Ok(())
}

fn central_gradient(g: &TensorField, spacing: &[f64], site: &Site) -> Result<Vec<DMatrix<f64>>> {
    (0..g.dim())
        .map(|a| {
            let plus = metric_at(g, &site.offset(a, 1))?;
            let minus = metric_at(g, &site.offset(a, -1))?;
            Ok((plus - minus) / (2.0 * spacing[a]))
        })
        .collect()
}

/// Christoffel symbols at `site` from central differences of `g`.
pub fn christoffel(g: &TensorField, spacing: &[f64], site: &Site) -> Result<Christoffel> {
    check_metric_field(g)?;
    let g0 = metric_at(g, site)?;
    let grad = central_gradient(g, spacing, site)?;
    christoffel_from_derivatives(&g0, &grad)
}

/// Second-order Taylor model of a lattice metric around one site.
///
/// Value, gradient and Hessian come from central differences (mixed terms
/// use the diagonal neighbours), so the model reproduces quadratic metrics
/// exactly up to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricJet {
    center: Vec<f64>,
    value: DMatrix<f64>,
    grad: Vec<DMatrix<f64>>,
    hess: Vec<Vec<DMatrix<f64>>>,
}

impl MetricJet {
    pub fn new(
        center: Vec<f64>,
        value: DMatrix<f64>,
        grad: Vec<DMatrix<f64>>,
        hess: Vec<Vec<DMatrix<f64>>>,
    ) -> Self {
        MetricJet {
            center,
            value,
            grad,
            hess,
        }
    }

    pub fn from_lattice(g: &TensorField, spacing: &[f64], site: &Site) -> Result<Self> {
        check_metric_field(g)?;
        let n = g.dim();
        let g0 = metric_at(g, site)?;
        let grad = central_gradient(g, spacing, site)?;
        let mut hess = vec![vec![DMatrix::zeros(n, n); n]; n];
        for a in 0..n {
            let plus = metric_at(g, &site.offset(a, 1))?;
            let minus = metric_at(g, &site.offset(a, -1))?;
            hess[a][a] = (plus - &g0 * 2.0 + minus) / (spacing[a] * spacing[a]);
            for b in a + 1..n {
                let pp = metric_at(g, &site.offset(a, 1).offset(b, 1))?;
                let pm = metric_at(g, &site.offset(a, 1).offset(b, -1))?;
                let mp = metric_at(g, &site.offset(a, -1).offset(b, 1))?;
                let mm = metric_at(g, &site.offset(a, -1).offset(b, -1))?;
                let h = (pp - pm - mp + mm) / (4.0 * spacing[a] * spacing[b]);
                hess[a][b] = h.clone();
                hess[b][a] = h;
            }
        }
        let center = site.0.iter().zip(spacing).map(|(k, h)| *k as f64 * h).collect();
        Ok(MetricJet::new(center, g0, grad, hess))
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn value(&self) -> &DMatrix<f64> {
        &self.value
    }

    pub fn gradient(&self) -> &[DMatrix<f64>] {
        &self.grad
    }

    pub fn dim(&self) -> usize {
        self.value.nrows()
    }

    /// Model metric at coordinate point `x`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let mut out = self.value.clone();
        for a in 0..n {
            out += &self.grad[a] * d[a];
            for b in 0..n {
                out += &self.hess[a][b] * (0.5 * d[a] * d[b]);
            }
        }
        out
    }

    pub fn christoffel(&self) -> Result<Christoffel> {
        christoffel_from_derivatives(&self.value, &self.grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::IndexBox;

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let d = max_abs(&(a - b));
        assert!(d <= tol, "difference {d:e}\n{a}\n{b}");
    }

    #[test]
    fn frame_of_eta_is_identity() {
        for n in 1..=4 {
            assert_eq!(minkowski_frame(&minkowski(n)).unwrap(), DMatrix::identity(n, n));
        }
    }

    #[test]
    fn frame_of_diagonal_metric_rescales() {
        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-4.0, 9.0]));
        let j = minkowski_frame(&g).unwrap();
        assert_close(&j, &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0 / 3.0]), 1e-15);
    }

    #[test]
    fn frame_of_mixed_metric_reaches_eta() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, 1.0]);
        let j = minkowski_frame(&g).unwrap();
        let product = j.transpose() * &g * &j;
        assert_close(&product, &minkowski(2), 1e-12);
        // Independent oracle: explicit 2x2 triple product.
        let mut manual = DMatrix::zeros(2, 2);
        for a in 0..2 {
            for b in 0..2 {
                for m in 0..2 {
                    for n in 0..2 {
                        manual[(a, b)] += j[(m, a)] * g[(m, n)] * j[(n, b)];
                    }
                }
            }
        }
        assert_close(&manual, &minkowski(2), 1e-12);
    }

    #[test]
    fn riemannian_and_degenerate_metrics_rejected() {
        let e = DMatrix::identity(3, 3);
        assert!(matches!(minkowski_frame(&e), Err(Error::WrongSignature(_))));
        let two_neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -1.0, 1.0]));
        assert!(matches!(minkowski_frame(&two_neg), Err(Error::WrongSignature(_))));
        let degenerate = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.0]));
        assert!(matches!(minkowski_frame(&degenerate), Err(Error::WrongSignature(_))));
    }

    fn metric_field(f: impl Fn(f64, f64) -> DMatrix<f64>, h: f64) -> TensorField {
        let b = IndexBox::new(vec![-3, -3], vec![3, 3]);
        TensorField::metric_from_fn(2, b.sites(), |s| f(s.0[0] as f64 * h, s.0[1] as f64 * h))
    }

    #[test]
    fn constant_metric_has_no_connection() {
        let g = metric_field(|_, _| DMatrix::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, 1.5]), 0.1);
        let c = christoffel(&g, &[0.1, 0.1], &Site::new(vec![0, 0])).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn christoffel_matches_closed_form_to_second_order() {
        // g = diag(-1, f(x1)), f = exp(x1): Gamma^1_{11} = f'/(2f) = 1/2.
        let exact = 0.5;
        let mut errs = vec![];
        for h in [0.1, 0.05, 0.025] {
            let g = metric_field(
                |_, y| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, (y + 0.3).exp()]),
                h,
            );
            let c = christoffel(&g, &[h, h], &Site::new(vec![0, 0])).unwrap();
            errs.push((c.get(1, 1, 1) - exact).abs());
            assert_eq!(c.get(0, 0, 1), c.get(0, 1, 0));
        }
        assert!(errs[0] < 1e-2);
        let order = (errs[0] / errs[2]).log2() / 2.0;
        assert!((order - 2.0).abs() < 0.1, "observed order {order}");
    }

    #[test]
    fn boundary_site_is_reported() {
        let g = metric_field(|_, _| minkowski(2), 1.0);
        let err = christoffel(&g, &[1.0, 1.0], &Site::new(vec![3, 0])).unwrap_err();
        assert_eq!(err, Error::BoundarySite(vec![4, 0]));
    }

    #[test]
    fn jet_reproduces_quadratic_metric() {
        let f = |x: f64, y: f64| {
            DMatrix::from_row_slice(
                2,
                2,
                &[-1.0 + 0.1 * x * y, 0.05 * x * x, 0.05 * x * x, 1.0 + 0.2 * y * y - 0.1 * x],
            )
        };
        let h = 0.5;
        let g = metric_field(f, h);
        let jet = MetricJet::from_lattice(&g, &[h, h], &Site::new(vec![1, -1])).unwrap();
        for (x, y) in [(0.3, -0.2), (1.1, 0.7), (-0.4, -1.3)] {
            assert_close(&jet.eval(&[x, y]), &f(x, y), 1e-13);
        }
        let lattice = christoffel(&g, &[h, h], &Site::new(vec![1, -1])).unwrap();
        assert_eq!(jet.christoffel().unwrap(), lattice);
    }
}
