//! The amplitude between two endpoints computed through extended-state
//! operations (enumerate paths, extract the Lagrangian, project onto the
//! boundary, exponentiate, sum), compared with the direct transfer matrix.

use num_rational::Rational64;
use qequiv::extended_state::BoundarySpec;
use qequiv::path_integral::{pipeline_amplitude, propagator_direct, ParticleModel, Potential};

fn main() -> qequiv::Result<()> {
    let model = ParticleModel::uniform(Potential::Harmonic { omega: 1.0 }, -2, 2, 5, Rational64::new(1, 2), 4)?;
    let t = &model.time;
    let y = |j: i64| model.lattice.origin + model.lattice.step * Rational64::from_integer(j);
    for (a, b) in [(0, 4), (2, 2), (1, 3)] {
        let boundary = BoundarySpec::path(t.t_i, t.t_f(), Some(y(a)), Some(y(b)))?;
        let via_states = pipeline_amplitude(&model, &boundary)?;
        let direct = propagator_direct(&model, model.lattice.position(a), model.lattice.position(b))?;
        println!(
            "y_i = {:5.2}, y_f = {:5.2}: pipeline {:+.6e} {:+.6e}i, transfer matrix {:+.6e} {:+.6e}i",
            model.lattice.position(a),
            model.lattice.position(b),
            via_states.re,
            via_states.im,
            direct.re,
            direct.im
        );
    }
    Ok(())
}
