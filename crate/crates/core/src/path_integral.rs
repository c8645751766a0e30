//! Time-sliced particle path integral on a position lattice, with the
//! closed-form free and harmonic propagators as references.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, PathConfig};
use crate::error::{Error, Result};
use crate::extended_state::{
    amplitude, exp_int, extract_a, project, BoundarySpec, ExtendedState, Normalization, ProjectTarget, Quantity,
};
use crate::lattice::{rational_to_f64, PositionLattice, TimeSupport};
use crate::numerics::{compensated_sum, ComplexSum};

/// Default upper bound on the number of enumerated paths.
pub const ENUMERATION_CAP: usize = 1_000_000;
pub const MAX_POSITIONS: usize = 2048;
pub const MAX_SLICES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Potential {
    Zero,
    /// `V(y) = m omega^2 y^2 / 2`.
    Harmonic { omega: f64 },
}

impl Potential {
    pub fn value(&self, mass: f64, y: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic { omega } => 0.5 * mass * omega * omega * y * y,
        }
    }
}

/// Time grid `t_k = t_i + k dt`, `0 <= k <= slices`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_i: Rational64,
    pub dt: Rational64,
    pub slices: usize,
}

impl TimeGrid {
    pub fn t_f(&self) -> Rational64 {
        self.t_i + self.dt * Rational64::from_integer(self.slices as i64)
    }

    pub fn duration(&self) -> f64 {
        rational_to_f64(self.dt) * self.slices as f64
    }

    pub fn support(&self, start: i64, end: i64) -> Result<TimeSupport> {
        TimeSupport::interval(self.t_i, self.dt, start, end)
    }
}

#[derive(Deserialize)]
struct RawModel {
    mass: f64,
    hbar: f64,
    potential: Potential,
    lattice: PositionLattice,
    time: TimeGrid,
}

/// A particle of mass `m` in potential `V` on a position lattice and a
/// time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ParticleModel {
    pub mass: f64,
    pub hbar: f64,
    pub potential: Potential,
    pub lattice: PositionLattice,
    pub time: TimeGrid,
}

impl TryFrom<RawModel> for ParticleModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        ParticleModel::new(r.mass, r.hbar, r.potential, r.lattice, r.time)
    }
}

impl ParticleModel {
    pub fn new(
        mass: f64,
        hbar: f64,
        potential: Potential,
        lattice: PositionLattice,
        time: TimeGrid,
    ) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) || !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidModel("mass and hbar must be positive".into()));
        }
        if let Potential::Harmonic { omega } = potential {
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(Error::InvalidModel("harmonic potential needs omega > 0".into()));
            }
        }
        if lattice.count < 2 {
            return Err(Error::InvalidModel("need at least two positions".into()));
        }
        if time.slices < 1 || time.dt <= Rational64::from_integer(0) {
            return Err(Error::InvalidModel("need at least one slice of positive length".into()));
        }
        Ok(ParticleModel {
            mass,
            hbar,
            potential,
            lattice,
            time,
        })
    }

    /// Unit mass and hbar, `count` positions spanning `[lo, hi]`, `slices`
    /// steps over `[0, duration]`.
    pub fn uniform(
        potential: Potential,
        lo: i64,
        hi: i64,
        count: usize,
        duration: Rational64,
        slices: usize,
    ) -> Result<Self> {
        let lattice = PositionLattice::spanning(
            Rational64::from_integer(lo),
            Rational64::from_integer(hi),
            count,
        )?;
        let time = TimeGrid {
            t_i: Rational64::from_integer(0),
            dt: duration / Rational64::from_integer(slices as i64),
            slices,
        };
        Self::new(1.0, 1.0, potential, lattice, time)
    }

    pub fn dt(&self) -> f64 {
        rational_to_f64(self.time.dt)
    }

    pub fn dy(&self) -> f64 {
        self.lattice.step_f64()
    }

    /// One-step normalisation `(m / (2 pi i hbar dt))^{1/2}`.
    pub fn slice_factor(&self) -> Complex64 {
        let r = (self.mass / (2.0 * PI * self.hbar * self.dt())).sqrt();
        Complex64::from_polar(r, -PI / 4.0)
    }

    fn position_index(&self, y: f64) -> Result<usize> {
        let q = (y - self.lattice.position(0)) / self.dy();
        let j = q.round();
        if (q - j).abs() > 1e-9 || j < 0.0 || j as usize >= self.lattice.count {
            return Err(Error::InvalidBoundary(format!("position {y} is not a lattice point")));
        }
        Ok(j as usize)
    }

    fn check_size(&self) -> Result<()> {
        if self.lattice.count > MAX_POSITIONS || self.time.slices > MAX_SLICES {
            return Err(Error::TooLarge(format!(
                "P = {}, N = {} exceeds P <= {MAX_POSITIONS}, N <= {MAX_SLICES}",
                self.lattice.count, self.time.slices
            )));
        }
        Ok(())
    }
}

/// Every lattice path between fixed endpoints on the boundary's interval.
pub fn enumerate_paths(
    model: &ParticleModel,
    boundary: &BoundarySpec,
    cap: usize,
) -> Result<Vec<PathConfig>> {
    let BoundarySpec::Path {
        t_i,
        t_f,
        y_i: Some(y_i),
        y_f: Some(y_f),
    } = boundary
    else {
        return Err(Error::InvalidBoundary(
            "enumeration needs a path boundary with both endpoints".into(),
        ));
    };
    let grid = &model.time;
    let index = |t: Rational64| {
        let q = (t - grid.t_i) / grid.dt;
        (q.is_integer() && q.to_integer() >= 0 && q.to_integer() <= grid.slices as i64)
            .then(|| q.to_integer())
            .ok_or_else(|| Error::InvalidBoundary(format!("time {t} is not on the grid")))
    };
    let (k_i, k_f) = (index(*t_i)?, index(*t_f)?);
    if k_i >= k_f {
        return Err(Error::InvalidBoundary("t_i must precede t_f".into()));
    }
    let lat = &model.lattice;
    let j_i = lat
        .index_of(*y_i)
        .ok_or_else(|| Error::InvalidBoundary(format!("y_i = {y_i} is off the lattice")))?;
    let j_f = lat
        .index_of(*y_f)
        .ok_or_else(|| Error::InvalidBoundary(format!("y_f = {y_f} is off the lattice")))?;
    let interior = (k_f - k_i - 1) as u32;
    let count = (lat.count as u128).checked_pow(interior).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::TooLarge(format!("{} ^ {interior} paths exceeds cap {cap}", lat.count)));
    }
    let support = grid.support(k_i, k_f)?;
    let p = lat.count as i64;
    let mut out = Vec::with_capacity(count as usize);
    let mut digits = vec![0i64; interior as usize];
    loop {
        let values = std::iter::once((k_i, j_i))
            .chain(digits.iter().enumerate().map(|(n, j)| (k_i + 1 + n as i64, *j)))
            .chain(std::iter::once((k_f, j_f)))
            .collect();
        out.push(PathConfig::new(support.clone(), *lat, values)?);
        // Odometer increment, last interior site fastest.
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < p {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Left-point time-sliced action of a single-interval path.
pub fn action(model: &ParticleModel, u: &PathConfig) -> Result<f64> {
    let [[a, b]] = u.support().intervals() else {
        return Err(Error::DisconnectedSupport);
    };
    let dt = rational_to_f64(u.support().step());
    let m = model.mass;
    Ok(compensated_sum((*a..*b).map(|k| {
        let y0 = u.position_at(k).expect("support index");
        let y1 = u.position_at(k + 1).expect("support index");
        let v = (y1 - y0) / dt;
        (0.5 * m * v * v - model.potential.value(m, y0)) * dt
    })))
}

/// `K(y_f, T; y_i)` for every lattice `y_f`, by repeated application of the
/// one-step kernel.
pub fn propagator_row(model: &ParticleModel, y_i: f64) -> Result<Vec<Complex64>> {
    model.check_size()?;
    let j_i = model.position_index(y_i)?;
    let p = model.lattice.count;
    let (m, hbar, dt, dy) = (model.mass, model.hbar, model.dt(), model.dy());
    let c = model.slice_factor();
    let kinetic: Vec<Complex64> = (0..p)
        .map(|d| {
            let dist = d as f64 * dy;
            Complex64::from_polar(1.0, 0.5 * m * dist * dist / (dt * hbar))
        })
        .collect();
    let potential: Vec<Complex64> = (0..p)
        .map(|j| {
            let v = model.potential.value(m, model.lattice.position(j as i64));
            Complex64::from_polar(1.0, -v * dt / hbar)
        })
        .collect();
    let mut psi = vec![Complex64::new(0.0, 0.0); p];
    psi[j_i] = Complex64::new(1.0, 0.0);
    for _ in 0..model.time.slices {
        let src: Vec<Complex64> = psi.iter().zip(&potential).map(|(a, b)| a * b).collect();
        psi = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut acc = ComplexSum::new();
                for (i, s) in src.iter().enumerate() {
                    if s.re != 0.0 || s.im != 0.0 {
                        acc.add(kinetic[j.abs_diff(i)] * s);
                    }
                }
                c * acc.value()
            })
            .collect();
    }
    let scale = dy.powi(model.time.slices as i32 - 1);
    Ok(psi.into_iter().map(|z| z * scale).collect())
}

/// The amplitude between the boundary's endpoints computed through the
/// extended-state operations: every lattice path with those ends enters with
/// unit weight, then Lagrangian extraction, projection onto the boundary,
/// exponentiation with the time-sliced measure and the amplitude sum.
pub fn pipeline_amplitude(model: &ParticleModel, boundary: &BoundarySpec) -> Result<Complex64> {
    let paths = enumerate_paths(model, boundary, ENUMERATION_CAP)?;
    let one = Complex64::new(1.0, 0.0);
    let state = ExtendedState::from_configs(paths.into_iter().map(|u| (Configuration::Path(u), one)))?;
    let lagrangian = Quantity::Lagrangian {
        mass: model.mass,
        potential: model.potential,
    };
    let a = extract_a(&state, &lagrangian)?;
    let projected = project(&a, &ProjectTarget::Boundary(boundary.clone()))?;
    let norm = Normalization::TimeSliced {
        mass: model.mass,
        dy: model.dy(),
    };
    let weighted = exp_int(&projected, model.hbar, &norm)?;
    amplitude(&weighted, boundary)
}

/// Lattice propagator between two lattice positions.
pub fn propagator_direct(model: &ParticleModel, y_i: f64, y_f: f64) -> Result<Complex64> {
    let j_f = model.position_index(y_f)?;
    Ok(propagator_row(model, y_i)?[j_f])
}

/// Continuum free-particle propagator.
pub fn free_propagator(mass: f64, hbar: f64, t: f64, y_i: f64, y_f: f64) -> Complex64 {
    let r = (mass / (2.0 * PI * hbar * t)).sqrt();
    let d = y_f - y_i;
    Complex64::from_polar(r, mass * d * d / (2.0 * hbar * t) - PI / 4.0)
}

/// Continuum harmonic-oscillator propagator, including the phase jump of
/// `-pi/2` at each caustic crossed.
pub fn mehler_propagator(
    mass: f64,
    hbar: f64,
    omega: f64,
    t: f64,
    y_i: f64,
    y_f: f64,
) -> Result<Complex64> {
    let wt = omega * t;
    let s = wt.sin();
    if s.abs() <= 1e-12 * wt.abs().max(1.0) {
        return Err(Error::CausticEncountered(wt));
    }
    let crossings = (wt / PI).floor();
    let r = (mass * omega / (2.0 * PI * hbar * s.abs())).sqrt();
    let phase = mass * omega * ((y_i * y_i + y_f * y_f) * wt.cos() - 2.0 * y_i * y_f)
        / (2.0 * hbar * s)
        - PI / 4.0
        - PI / 2.0 * crossings;
    Ok(Complex64::from_polar(r, phase))
}

/// Closed-form propagator for the model's potential over its full grid.
pub fn analytic_propagator(model: &ParticleModel, y_i: f64, y_f: f64) -> Result<Complex64> {
    let t = model.time.duration();
    match model.potential {
        Potential::Zero => Ok(free_propagator(model.mass, model.hbar, t, y_i, y_f)),
        Potential::Harmonic { omega } => {
            mehler_propagator(model.mass, model.hbar, omega, t, y_i, y_f)
        }
    }
}
