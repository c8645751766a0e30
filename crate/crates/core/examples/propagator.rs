//! Lattice propagator of a free particle and a harmonic oscillator, printed
//! next to the closed forms. Coarse time steps keep the one-step kernel
//! resolved on the position lattice.

use num_rational::Rational64;
use qequiv::path_integral::{analytic_propagator, propagator_row, ParticleModel, Potential};

fn main() -> qequiv::Result<()> {
    for (name, potential) in [("free", Potential::Zero), ("harmonic", Potential::Harmonic { omega: 1.0 })] {
        let model = ParticleModel::uniform(potential, -10, 10, 401, Rational64::from_integer(1), 4)?;
        let row = propagator_row(&model, 0.0)?;
        println!("{name}: N = {}, P = {}", model.time.slices, model.lattice.count);
        for j in [200usize, 210, 220] {
            let y = model.lattice.position(j as i64);
            let exact = analytic_propagator(&model, 0.0, y)?;
            println!("  y_f = {y:5.2}  lattice {:+.5} {:+.5}i   exact {:+.5} {:+.5}i", row[j].re, row[j].im, exact.re, exact.im);
        }
    }
    Ok(())
}
