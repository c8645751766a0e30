//! Group-action laws of quantum diffeomorphisms on random field states.

use proptest::prelude::*;
use qequiv::configuration::Catalog;
use qequiv::generators::{random_field_state, FieldStateSpec};
use qequiv::geometry::{Diffeo, LatticeMap};
use qequiv::quantum_diffeo::{apply_restricted, compose, reverse_for, RestrictedQD};
use qequiv::scenario::{random_restricted_qd, weight_distance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec() -> FieldStateSpec {
    FieldStateSpec { terms: 3, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identity_acts_trivially(seed in any::<u64>()) {
        let s = random_field_state(&mut ChaCha8Rng::seed_from_u64(seed), &spec()).unwrap();
        prop_assert_eq!(apply_restricted(&RestrictedQD::identity(), &s).unwrap(), s);
    }

    #[test]
    fn reverse_undoes_action(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_field_state(&mut rng, &spec()).unwrap();
        let qd = random_restricted_qd(&mut rng, &s, 3, true);
        let image = apply_restricted(&qd, &s).unwrap();
        prop_assert_eq!(apply_restricted(&reverse_for(&qd, &s).unwrap(), &image).unwrap(), s);
    }

    #[test]
    fn composition_is_sequential_action(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_field_state(&mut rng, &spec()).unwrap();
        let q1 = random_restricted_qd(&mut rng, &s, 2, true);
        let s1 = apply_restricted(&q1, &s).unwrap();
        let q2 = random_restricted_qd(&mut rng, &s1, 2, true);
        let mut catalog = Catalog::new();
        for st in [&s, &s1] {
            for (_, t) in st.terms() {
                catalog.register(t.config.clone());
            }
        }
        let both = apply_restricted(&compose(&q1, &q2, &catalog).unwrap(), &s).unwrap();
        let stepwise = apply_restricted(&q2, &s1).unwrap();
        prop_assert_eq!(weight_distance(&both, &stepwise), Some(0.0));
    }

    #[test]
    fn uniform_translation_keeps_weights(seed in any::<u64>(), dx in -3i64..=3, dy in -3i64..=3) {
        let s = random_field_state(&mut ChaCha8Rng::seed_from_u64(seed), &spec()).unwrap();
        let qd = RestrictedQD::uniform(Diffeo::Lattice(LatticeMap::translation(vec![dx, dy])));
        let image = apply_restricted(&qd, &s).unwrap();
        let mut before: Vec<_> = s.terms().map(|(_, t)| (t.weight.re, t.weight.im)).collect();
        let mut after: Vec<_> = image.terms().map(|(_, t)| (t.weight.re, t.weight.im)).collect();
        before.sort_by(|a, b| a.partial_cmp(b).unwrap());
        after.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(before, after);
    }
}
