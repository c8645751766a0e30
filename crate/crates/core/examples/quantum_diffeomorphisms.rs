//! Acting on a random field state with per-branch lattice maps: the image,
//! the round trip through `reverse_for`, and composition.

use qequiv::configuration::Catalog;
use qequiv::generators::{random_field_state, FieldStateSpec};
use qequiv::quantum_diffeo::{apply_restricted, compose, reverse_for};
use qequiv::scenario::{random_restricted_qd, weight_distance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qequiv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let state = random_field_state(&mut rng, &FieldStateSpec { terms: 3, ..Default::default() })?;
    let q1 = random_restricted_qd(&mut rng, &state, 3, true);
    let image = apply_restricted(&q1, &state)?;
    for ((u, t), (v, s)) in state.terms().zip(image.terms()) {
        let (a, b) = (t.config.as_field().unwrap(), s.config.as_field().unwrap());
        println!("{u} {:?} -> {v} {:?}", a.support().boxes(), b.support().boxes());
    }
    let back = apply_restricted(&reverse_for(&q1, &state)?, &image)?;
    println!("round trip restores the state: {}", back == state);

    let q2 = random_restricted_qd(&mut rng, &image, 3, true);
    let mut catalog = Catalog::new();
    for st in [&state, &image] {
        for (_, t) in st.terms() {
            catalog.register(t.config.clone());
        }
    }
    let both = apply_restricted(&compose(&q1, &q2, &catalog)?, &state)?;
    let stepwise = apply_restricted(&q2, &image)?;
    println!("composition matches stepwise action: {:?}", weight_distance(&both, &stepwise));
    Ok(())
}
